//! One `--kebab-case` flag per [`RunConfig`] key, plus `--config <file>`.

use std::path::PathBuf;

use clap::{Arg, ArgAction, ArgMatches, Args, Command, FromArgMatches};
use pmlam::config::{RunConfig, KEYS};

const BOOL_KEYS: &[&str] = &["deterministic", "margin_grad_to_theta"];
const ALIASES: &[(&str, &str)] = &[("distance_kind", "distance"), ("indicator_mode", "indicator")];

#[derive(Debug, Clone, Default)]
pub struct ConfigFlags {
    pub file: Option<PathBuf>,
    /// (key, value) in command-line order.
    pub overrides: Vec<(String, String)>,
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

impl ConfigFlags {
    /// Defaults, then the file, then the flags.
    pub fn resolve(&self) -> pmlam::Result<RunConfig> {
        let mut cfg = match &self.file {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        for (k, v) in &self.overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.overrides.iter().any(|(k, _)| k == key)
    }
}

impl FromArgMatches for ConfigFlags {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let mut out = ConfigFlags {
            file: m.get_one::<PathBuf>("config").cloned(),
            overrides: Vec::new(),
        };
        let mut indexed = Vec::new();
        for key in KEYS {
            if let (Some(v), Some(i)) = (m.get_one::<String>(key), m.index_of(key)) {
                indexed.push((i, key.to_string(), v.clone()));
            }
        }
        indexed.sort_by_key(|(i, _, _)| *i);
        out.overrides = indexed.into_iter().map(|(_, k, v)| (k, v)).collect();
        Ok(out)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for ConfigFlags {
    fn augment_args(cmd: Command) -> Command {
        let mut cmd = cmd.arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("Flat `key = value` config file; flags override it")
                .help_heading("Config"),
        );
        for key in KEYS {
            let mut arg = Arg::new(*key)
                .long(flag_name(key))
                .value_name("VALUE")
                .action(ArgAction::Set)
                .help_heading("Config");
            if let Some((_, alias)) = ALIASES.iter().find(|(k, _)| k == key) {
                arg = arg.visible_alias(*alias);
            }
            if BOOL_KEYS.contains(key) {
                arg = arg.num_args(0..=1).default_missing_value("true");
            }
            cmd = cmd.arg(arg);
        }
        cmd
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}
