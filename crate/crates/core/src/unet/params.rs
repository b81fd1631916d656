/// A named, shaped array of weights.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

/// An ordered collection of named arrays. Layers address their arrays by
/// position.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    pub arrays: Vec<NamedArray>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> usize {
        assert_eq!(dims.iter().product::<usize>(), data.len(), "array dims");
        self.arrays.push(NamedArray {
            name: name.into(),
            dims,
            data,
        });
        self.arrays.len() - 1
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arrays: self
                .arrays
                .iter()
                .map(|a| NamedArray {
                    name: a.name.clone(),
                    dims: a.dims.clone(),
                    data: vec![0.0; a.data.len()],
                })
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn n_values(&self) -> usize {
        self.arrays.iter().map(|a| a.data.len()).sum()
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.arrays.len() == other.arrays.len()
            && self
                .arrays
                .iter()
                .zip(&other.arrays)
                .all(|(a, b)| a.name == b.name && a.dims == b.dims)
    }

    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.arrays.iter().flat_map(|a| a.data.iter().copied())
    }
}

impl std::ops::Index<usize> for ParamSet {
    type Output = [f64];
    fn index(&self, i: usize) -> &[f64] {
        &self.arrays[i].data
    }
}

impl std::ops::IndexMut<usize> for ParamSet {
    fn index_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.arrays[i].data
    }
}
