//! JSON has no infinity; unbounded limits are written as `null`.

pub fn infinity() -> f64 {
    f64::INFINITY
}

pub fn neg_infinity() -> f64 {
    f64::NEG_INFINITY
}

macro_rules! inf_as_null {
    ($name:ident, $inf:expr) => {
        pub mod $name {
            use serde::{Deserialize, Deserializer, Serializer};

            pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
                if v.is_infinite() {
                    s.serialize_none()
                } else {
                    s.serialize_some(v)
                }
            }

            pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
                Ok(Option::<f64>::deserialize(d)?.unwrap_or($inf))
            }
        }
    };
}

inf_as_null!(neg, f64::NEG_INFINITY);
inf_as_null!(pos, f64::INFINITY);
