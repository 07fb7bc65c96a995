use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    map: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.map.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        self.map.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn num_values(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    /// Overwrite the values of an existing parameter, keeping its dims.
    pub fn set_data(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let t = self
            .map
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if t.len() != data.len() {
            return Err(Error::InvalidArgument(format!(
                "{name}: expected {} values, got {}",
                t.len(),
                data.len()
            )));
        }
        t.data_mut().copy_from_slice(data);
        Ok(())
    }

    pub(crate) fn data_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.map.get_mut(name).map(Tensor::data_mut)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(
            p.insert("w", Tensor::zeros(&[2])),
            Err(Error::DuplicateParam(_))
        ));
        assert_eq!(p.num_values(), 2);
    }
}
