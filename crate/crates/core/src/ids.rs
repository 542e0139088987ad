//! Identifier newtypes shared across the crate.

use serde::{Deserialize, Serialize};
use std::fmt;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(
    /// A vehicle (UE).
    VehicleId
);
id_type!(
    /// An access point: base stations first, then roadside units.
    ApId
);
id_type!(
    /// A social group, or a per-vehicle uplink group.
    GroupId
);
id_type!(
    /// A QoS flow record.
    FlowId
);
