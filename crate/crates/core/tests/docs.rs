//! The published schemas under docs/schemas are generated from the types;
//! this keeps them from drifting.

use std::path::PathBuf;

use wmforge_core::schema::{all_schemas, render};

fn schema_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas")
}

#[test]
fn published_schemas_are_current() {
    let dir = schema_dir();
    let regenerate = std::env::var_os("WMFORGE_REGENERATE_FIXTURES").is_some();
    if regenerate {
        std::fs::create_dir_all(&dir).unwrap();
    }
    let mut expected = Vec::new();
    for (name, schema) in all_schemas() {
        let file = format!("{name}.schema.json");
        let path = dir.join(&file);
        let fresh = render(&schema);
        if regenerate {
            std::fs::write(&path, &fresh).unwrap();
        }
        let on_disk = std::fs::read_to_string(&path).unwrap_or_default();
        assert_eq!(on_disk, fresh, "{file} is stale; rerun with WMFORGE_REGENERATE_FIXTURES=1");
        expected.push(file);
    }
    let mut present: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    present.sort();
    expected.sort();
    assert_eq!(present, expected, "docs/schemas has files no type produces");
}

#[test]
fn schemas_are_objects_with_titles() {
    for (name, schema) in all_schemas() {
        let v = schema.as_value();
        assert!(v.get("title").and_then(|t| t.as_str()).is_some(), "{name} has no title");
    }
}
