use std::path::Path;

use coordlab::reference::{build_reference, ConfigParams, REFERENCE_NAMES};
use coordlab::spec::CoordinationSpec;

#[test]
fn checked_in_configs_match_the_builders() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in REFERENCE_NAMES {
        let text = std::fs::read_to_string(dir.join(format!("{name}.toml"))).unwrap();
        let parsed = CoordinationSpec::from_toml(&text).unwrap();
        assert!(parsed.validate().is_ok(), "{name}");
        assert_eq!(parsed, build_reference(name, &ConfigParams::default()).unwrap(), "{name}");
    }
}
