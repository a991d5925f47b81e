//! Versioned JSON artifacts.
//!
//! Every file written by this crate is a JSON object carrying `schema` and
//! `version` keys next to the payload fields, so a reader can reject files
//! it does not understand before touching the body.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TafaError};

pub trait Artifact: Serialize + DeserializeOwned {
    const SCHEMA: &'static str;
    const VERSION: u32;
}

#[derive(Serialize)]
struct EnvelopeRef<'a, T> {
    schema: &'static str,
    version: u32,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Deserialize)]
struct Header {
    schema: String,
    version: u32,
}

pub fn to_json<A: Artifact>(artifact: &A) -> Result<String> {
    let env = EnvelopeRef {
        schema: A::SCHEMA,
        version: A::VERSION,
        body: artifact,
    };
    Ok(serde_json::to_string_pretty(&env)?)
}

pub fn from_json<A: Artifact>(text: &str) -> Result<A> {
    let mut value: serde_json::Value = serde_json::from_str(text)?;
    let header: Header = serde_json::from_value(value.clone()).map_err(|_| TafaError::Schema {
        expected: A::SCHEMA,
        version: A::VERSION,
        found: "<missing header>".into(),
    })?;
    if header.schema != A::SCHEMA || header.version != A::VERSION {
        return Err(TafaError::Schema {
            expected: A::SCHEMA,
            version: A::VERSION,
            found: format!("{} v{}", header.schema, header.version),
        });
    }
    if let Some(obj) = value.as_object_mut() {
        obj.remove("schema");
        obj.remove("version");
    }
    Ok(serde_json::from_value(value)?)
}

pub fn save<A: Artifact>(artifact: &A, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_json(artifact)?)?;
    Ok(())
}

pub fn load<A: Artifact>(path: impl AsRef<Path>) -> Result<A> {
    let text = fs::read_to_string(path)?;
    from_json(&text)
}
