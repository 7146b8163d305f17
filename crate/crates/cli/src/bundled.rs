//! Scenario files shipped with the binary. Commands accept their names in
//! place of a path.

pub const SCENARIOS: &[(&str, &str)] = &[
    (
        "paper_fig1_intact",
        include_str!("../../../scenarios/paper_fig1_intact.toml"),
    ),
    (
        "paper_fig2_reduced",
        include_str!("../../../scenarios/paper_fig2_reduced.toml"),
    ),
    (
        "reduced_allocated",
        include_str!("../../../scenarios/reduced_allocated.toml"),
    ),
];

/// Source text of a bundled scenario, by name with or without `.toml`.
pub fn lookup(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".toml").unwrap_or(name);
    SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}
