use mrloc::harness::ScenarioConfig;
use mrloc::Error;

/// Applies `section.key=value` assignments to `cfg`. Values are read as TOML
/// literals, falling back to a bare string (`run.methods=["mrl","gcc"]`,
/// `room.t60=0.45`, `signal.source_wav=speech.wav`).
pub fn apply(cfg: &ScenarioConfig, assignments: &[String]) -> Result<ScenarioConfig, Error> {
    if assignments.is_empty() {
        return Ok(cfg.clone());
    }
    let mut root = toml::Value::try_from(cfg).map_err(|e| Error::Config(e.to_string()))?;
    for a in assignments {
        let (path, raw) = a
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {a:?} is not of the form section.key=value")))?;
        let keys: Vec<&str> = path.trim().split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(Error::Config(format!("bad override path {path:?}")));
        }
        let value = parse_value(raw.trim());
        let mut node = &mut root;
        for key in &keys[..keys.len() - 1] {
            node = node
                .as_table_mut()
                .and_then(|t| t.get_mut(*key))
                .ok_or_else(|| Error::Config(format!("unknown config section {key:?} in {path:?}")))?;
        }
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{path:?} does not name a config key")))?;
        table.insert(keys[keys.len() - 1].to_string(), value);
    }
    let cfg: ScenarioConfig = root
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
