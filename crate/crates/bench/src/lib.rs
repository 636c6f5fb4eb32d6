//! Parameter fixtures for the benchmarks in `benches/`.

use magsync::{nondimensionalize, OperatingPoint, SystemParams};

/// Case ii in scaled units, full scale.
pub fn case_ii() -> SystemParams {
    nondimensionalize(&OperatingPoint::CaseII.params())
}
