//! Pulls `--<config key> <value>` pairs out of the argument list before clap
//! sees it, so every training-config field is settable from the command line.

use adagcl::TrainConfig;

const OVERRIDABLE: [&str; 2] = ["train", "experiment"];

fn config_key(flag: &str) -> Option<&'static str> {
    let name = flag.replace('-', "_");
    TrainConfig::KEYS.iter().copied().find(|k| *k == name)
}

/// Splits `args` into the arguments for clap and the config overrides, in
/// command-line order.
pub fn extract(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    rest.extend(it.next());
    let mut sub = None;
    while sub.is_none() {
        let Some(a) = it.next() else { break };
        if a == "--threads" {
            rest.push(a);
            rest.extend(it.next());
            continue;
        }
        if !a.starts_with('-') {
            sub = Some(a.clone());
        }
        rest.push(a);
    }
    if !sub.as_deref().is_some_and(|s| OVERRIDABLE.contains(&s)) {
        rest.extend(it);
        return Ok((rest, overrides));
    }
    while let Some(a) = it.next() {
        if a == "--" {
            rest.push(a);
            rest.extend(it.by_ref());
            break;
        }
        let Some(flag) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (flag, None),
        };
        match config_key(name) {
            Some(key) => {
                let value = match inline {
                    Some(v) => v,
                    None => it.next().ok_or_else(|| format!("--{name} needs a value"))?,
                };
                overrides.push((key.to_string(), value));
            }
            None => rest.push(a),
        }
    }
    Ok((rest, overrides))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn config_keys_are_extracted() {
        let (rest, ov) = extract(argv(
            "adagcl --threads 2 train --split d --lambda1 0.1 --edge-drop-ratio=0.2 --variant edge_drop",
        ))
        .unwrap();
        assert_eq!(rest, argv("adagcl --threads 2 train --split d"));
        assert_eq!(
            ov,
            vec![
                ("lambda1".into(), "0.1".into()),
                ("edge_drop_ratio".into(), "0.2".into()),
                ("variant".into(), "edge_drop".into())
            ]
        );
    }

    #[test]
    fn other_commands_untouched() {
        let args = argv("adagcl eval --checkpoint c --seed 3");
        assert_eq!(extract(args.clone()).unwrap(), (args, vec![]));
    }

    #[test]
    fn missing_value_is_an_error() {
        assert!(extract(argv("adagcl train --split d --dim")).is_err());
    }
}
