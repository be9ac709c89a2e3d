//! Behaviour common to the four networks: owning a parameter store.

use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::Real;

pub trait Network<T: Real> {
    fn store(&self) -> &ParameterStore<T>;
    fn store_mut(&mut self) -> &mut ParameterStore<T>;

    /// Overwrite every parameter with the identically named array from
    /// `source`. Both stores must hold exactly the same names and shapes.
    fn load_values(&mut self, source: &ParameterStore<T>) -> Result<()> {
        let own = self.store();
        if own.len() != source.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                own.len(),
                source.len()
            )));
        }
        let store = self.store_mut();
        for p in source.iter() {
            store.assign(&p.name, p.value.clone())?;
        }
        Ok(())
    }

    fn freeze(&mut self) {
        self.store_mut().set_trainable(false);
    }

    fn unfreeze(&mut self) {
        self.store_mut().set_trainable(true);
    }
}

macro_rules! impl_network {
    ($ty:ident) => {
        impl<T: $crate::tensor::Real> $crate::network::Network<T> for $ty<T> {
            fn store(&self) -> &$crate::params::ParameterStore<T> {
                &self.store
            }
            fn store_mut(&mut self) -> &mut $crate::params::ParameterStore<T> {
                &mut self.store
            }
        }
    };
}
pub(crate) use impl_network;
