//! Configuration and orchestration for the `nematiq` command.

pub mod config;
pub mod run;
pub mod suite;

/// Split `--key value`, `--key=value` and `key=value` tokens into pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, config::ConfigError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let bare = a.strip_prefix("--").unwrap_or(a);
        if let Some((k, v)) = bare.split_once('=') {
            out.push((k.to_string(), v.to_string()));
        } else if a.starts_with("--") {
            let v = it.next().ok_or_else(|| config::ConfigError { key: bare.into(), line: None, message: "missing value".into() })?;
            out.push((bare.to_string(), v.clone()));
        } else {
            return Err(config::ConfigError { key: a.clone(), line: None, message: "expected --key value or key=value".into() });
        }
    }
    Ok(out)
}
