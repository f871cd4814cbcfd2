//! Shared fixtures for the benchmarks.

use mixborrow::simulate::{generate, ScenarioKind, SimScenario};
use mixborrow::{build_dlnm_spec, build_mim_spec, Dataset, ModelSpec, Result};

/// Reduced lagged scenario with its DLNM spec (lag basis of dimension `m`).
pub fn lagged_fixture(n: usize, p: usize, l: usize, m: Option<usize>) -> Result<(ModelSpec, Dataset)> {
    let (data, _) = generate(&SimScenario::reduced(ScenarioKind::SimA, n, p, l, 11))?;
    let spec = build_dlnm_spec(p, l, m)?.with_outcomes(data.n_outcomes());
    Ok((spec, data))
}

/// Cross-sectional scenario with a J-index MIM spec.
pub fn mim_fixture(n: usize, j: usize) -> Result<(ModelSpec, Dataset)> {
    let (data, _) = generate(&SimScenario::standard(ScenarioKind::SimB1, n, 11))?;
    let spec = build_mim_spec(10, j)?.with_outcomes(data.n_outcomes());
    Ok((spec, data))
}
