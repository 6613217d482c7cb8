//! Fixtures shared by the benchmarks.

use satint_core::{build_map, builtin, EquilibriumMap, PlantModel, SaturatorSpec};

/// A built-in plant on `[-1, 1]` with its equilibrium map.
pub fn fixture(name: &str) -> (PlantModel, SaturatorSpec, EquilibriumMap) {
    let plant = builtin(name).unwrap_or_else(|| panic!("no built-in plant '{name}'"));
    let spec = SaturatorSpec::new(-1.0, 1.0).expect("valid box");
    let map = build_map(&plant, &spec, 201).expect("equilibrium map");
    (plant, spec, map)
}
