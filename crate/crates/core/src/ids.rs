//! Identifier newtypes shared by every module.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }

        impl From<u32> for $name {
            fn from(v: u32) -> Self {
                Self(v)
            }
        }
    };
}

id_type!(
    /// A MovieLens user id.
    UserId
);
id_type!(
    /// A MovieLens movie id.
    MovieId
);
id_type!(
    /// Index of a cluster in a [`crate::clustering::ClusterModel`], in `0..k`.
    ClusterId
);

impl ClusterId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}
