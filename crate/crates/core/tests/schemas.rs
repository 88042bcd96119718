use std::path::Path;

use anthro_core::provider::structured::required_fields;
use anthro_core::provider::SchemaId;
use serde_json::Value;

fn load(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(name);
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn required(doc: &Value) -> Vec<String> {
    let obj = if doc["type"] == "array" { &doc["items"] } else { doc };
    obj["required"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect()
}

#[test]
fn published_schemas_match_parser_requirements() {
    for (file, schema) in [
        ("self_state.v1.json", SchemaId::SelfState),
        ("other_state.v1.json", SchemaId::OtherState),
        ("memory_pieces.v1.json", SchemaId::MemoryPieces),
    ] {
        let doc = load(file);
        assert_eq!(required(&doc), required_fields(schema), "{file}");
        let props = if doc["type"] == "array" { &doc["items"]["properties"] } else { &doc["properties"] };
        for field in required_fields(schema) {
            assert!(props.get(field).is_some(), "{file} lacks property {field}");
        }
    }
}

#[test]
fn emotion_enum_matches_model() {
    let doc = load("self_state.v1.json");
    let listed: Vec<String> =
        doc["$defs"]["emotion"]["enum"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    let model: Vec<String> = anthro_core::awareness::Emotion::ALL.iter().map(|e| e.as_str().to_string()).collect();
    assert_eq!(listed, model);
}
