use std::path::PathBuf;

use macplane::scenarios::{builtin, BUILTIN};
use macplane::{ConfigError, ScenarioConfig};

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

#[test]
fn checked_in_files_match_builtins() {
    for name in BUILTIN {
        let parsed = ScenarioConfig::load(&dir().join(format!("{name}.toml"))).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(parsed, builtin(name).unwrap(), "{name}");
    }
}

#[test]
fn serialized_builtins_parse_back() {
    for name in BUILTIN {
        let cfg = builtin(name).unwrap();
        let back = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg, "{name}");
    }
}

#[test]
fn unknown_key_is_rejected() {
    let text = std::fs::read_to_string(dir().join("p1a.toml")).unwrap().replace("[sim]\n", "[sim]\nspeed = 2\n");
    assert!(matches!(ScenarioConfig::from_toml_str(&text), Err(ConfigError::Parse { .. })));
}

#[test]
fn missing_file_is_an_error() {
    assert!(ScenarioConfig::load(&dir().join("nope.toml")).is_err());
}
