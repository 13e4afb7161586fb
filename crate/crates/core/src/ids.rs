use std::fmt;
use std::sync::Mutex;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(raw: impl Into<String>) -> Self {
                $name(raw.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }
    };
}

id_type!(ProjectId);
id_type!(NodeId);
id_type!(JobId);
id_type!(ExchangeId);

/// Source of fresh identifiers.
///
/// `Random` draws from the OS-seeded thread RNG. `Seeded` draws from a fixed
/// seed so that a whole session (ids included) is reproducible; ids are still
/// unique within one generator.
pub struct IdGen {
    rng: Option<Mutex<StdRng>>,
}

impl IdGen {
    pub fn random() -> Self {
        IdGen { rng: None }
    }

    pub fn seeded(seed: u64) -> Self {
        IdGen {
            rng: Some(Mutex::new(StdRng::seed_from_u64(seed))),
        }
    }

    pub fn is_seeded(&self) -> bool {
        self.rng.is_some()
    }

    fn raw(&self) -> String {
        let bytes: [u8; 16] = match &self.rng {
            Some(rng) => rng.lock().expect("id rng poisoned").random(),
            None => rand::rng().random(),
        };
        uuid::Builder::from_random_bytes(bytes)
            .into_uuid()
            .simple()
            .to_string()
    }

    pub fn seed(&self) -> u64 {
        match &self.rng {
            Some(rng) => rng.lock().expect("id rng poisoned").random(),
            None => rand::rng().random(),
        }
    }

    pub fn project(&self) -> ProjectId {
        ProjectId(format!("p{}", self.raw()))
    }

    pub fn node(&self) -> NodeId {
        NodeId(format!("n{}", self.raw()))
    }

    pub fn job(&self) -> JobId {
        JobId(format!("j{}", self.raw()))
    }

    pub fn exchange(&self) -> ExchangeId {
        ExchangeId(format!("x{}", self.raw()))
    }
}

impl fmt::Debug for IdGen {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IdGen")
            .field("seeded", &self.is_seeded())
            .finish()
    }
}
