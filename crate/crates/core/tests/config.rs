use crowdnav::config::RunConfig;
use std::path::Path;

fn shipped(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    RunConfig::load(&path).unwrap()
}

#[test]
fn shipped_configs_match_builtin_profiles() {
    assert_eq!(shipped("desk.toml"), RunConfig::desk());
    assert_eq!(shipped("paper.toml"), RunConfig::paper());
    assert_ne!(RunConfig::desk().hash_hex(), RunConfig::paper().hash_hex());
}

#[test]
fn configs_without_newer_orca_fields_still_load() {
    let text = RunConfig::desk().to_toml_string().replace("symmetry_rotation = 0.001\n", "");
    let cfg = RunConfig::from_toml_str(&text).unwrap();
    assert_eq!(cfg, RunConfig::desk());
}
