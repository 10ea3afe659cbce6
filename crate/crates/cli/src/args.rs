use std::fmt;

use easyasr_core::{parse_cluster_spec, ClusterSpec};

use crate::CliError;

/// A subcommand. `ASR_*` names from the PAI component set map onto these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Component {
    CreateDataset,
    Train,
    Eval,
    Export,
    Predict,
    ZooRegister,
    ZooList,
}

impl Component {
    pub const ALL: [Component; 7] = [
        Component::CreateDataset,
        Component::Train,
        Component::Eval,
        Component::Export,
        Component::Predict,
        Component::ZooRegister,
        Component::ZooList,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::CreateDataset => "create-dataset",
            Component::Train => "train",
            Component::Eval => "eval",
            Component::Export => "export",
            Component::Predict => "predict",
            Component::ZooRegister => "zoo-register",
            Component::ZooList => "zoo-list",
        }
    }

    /// Accepted `-D` keys. `name` is a free-form job label everywhere.
    pub fn flags(self) -> &'static [&'static str] {
        match self {
            Component::CreateDataset => &[
                "name",
                "config",
                "input",
                "output",
                "shard_size",
                "augment_freq_mask",
                "augment_time_mask",
                "augment_multiplier",
            ],
            Component::Train => &[
                "name",
                "finetune",
                "config",
                "export",
                "cluster",
                "train_data",
                "eval_data",
                "vocab",
                "checkpoint",
                "checkpoint_dir",
            ],
            Component::Eval => &["name", "bundle", "model_name", "version", "zoo", "input", "output", "beam"],
            Component::Export => &["name", "checkpoint", "config", "vocab", "export"],
            Component::Predict => &["name", "bundle", "model_name", "version", "zoo", "input", "output", "beam"],
            Component::ZooRegister => &["name", "model_name", "bundle", "zoo"],
            Component::ZooList => &["name", "zoo", "output"],
        }
    }

    /// Resolves a subcommand name or a PAI component name.
    pub fn from_name(name: &str) -> Option<Self> {
        let pai = match name {
            "ASR_Create_Dataset" => Some(Component::CreateDataset),
            "ASR_Train" => Some(Component::Train),
            "ASR_Eval" => Some(Component::Eval),
            "ASR_Export" => Some(Component::Export),
            "ASR_Predict" => Some(Component::Predict),
            _ => None,
        };
        pai.or_else(|| Self::ALL.into_iter().find(|c| c.name() == name))
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The video-mining component is recognized so that it can be refused clearly.
pub const UNSUPPORTED_COMPONENT: &str = "ASR_Extract_from_Video";

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Run(CommandInvocation),
    Help,
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandInvocation {
    pub component: Component,
    /// `-Dkey=value` pairs in command-line order, keys unique.
    pub flags: Vec<(String, String)>,
    /// Parsed `-Dcluster`, single worker when absent.
    pub cluster: ClusterSpec,
}

impl CommandInvocation {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.flags.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key)
            .ok_or_else(|| CliError::Usage(format!("{} requires -D{key}", self.component)))
    }

    /// Parses an optional flag with `FromStr`.
    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| CliError::Usage(format!("-D{key}: cannot parse `{v}`")))
            })
            .transpose()
    }

    pub fn flag_bool(&self, key: &str) -> Result<bool, CliError> {
        match self.get(key) {
            None | Some("false") => Ok(false),
            Some("true") => Ok(true),
            Some(v) => Err(CliError::Usage(format!("-D{key}: expected true or false, got `{v}`"))),
        }
    }
}

/// Removes one layer of matching single or double quotes.
fn unquote(value: &str) -> &str {
    for q in ['\'', '"'] {
        if value.len() >= 2 && value.starts_with(q) && value.ends_with(q) {
            return &value[1..value.len() - 1];
        }
    }
    value
}

/// Parses arguments after the program name: either `<component> -Dk=v ...`
/// or `-name ASR_Train -Dk=v ...`. A trailing `;` on the last argument is
/// ignored, as in PAI scripts.
pub fn parse_args<S: AsRef<str>>(argv: &[S]) -> Result<Command, CliError> {
    let mut args: Vec<&str> = argv.iter().map(AsRef::as_ref).collect();
    if let Some(last) = args.last_mut() {
        *last = last.strip_suffix(';').unwrap_or(last);
        if last.is_empty() {
            args.pop();
        }
    }
    let (name, rest) = match args.as_slice() {
        [] => return Err(CliError::Usage("missing component".into())),
        ["-h" | "--help" | "help", ..] => return Ok(Command::Help),
        ["-name", name, rest @ ..] => (*name, rest),
        ["-name"] => return Err(CliError::Usage("-name needs a component".into())),
        [name, rest @ ..] => (*name, rest),
    };
    let name = unquote(name);
    if name == UNSUPPORTED_COMPONENT {
        return Ok(Command::Unsupported(name.to_string()));
    }
    let component = Component::from_name(name).ok_or_else(|| CliError::Usage(format!("unknown component `{name}`")))?;

    let mut flags: Vec<(String, String)> = Vec::new();
    for arg in rest {
        let body = arg
            .strip_prefix("-D")
            .ok_or_else(|| CliError::Usage(format!("unexpected argument `{arg}`, expected -Dkey=value")))?;
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("-D{body}: missing `=value`")))?;
        if !component.flags().contains(&key) {
            return Err(CliError::Usage(format!("unknown flag -D{key} for {component}")));
        }
        if flags.iter().any(|(k, _)| k == key) {
            return Err(CliError::Usage(format!("duplicate flag -D{key}")));
        }
        flags.push((key.to_string(), unquote(value).to_string()));
    }
    let cluster = match flags.iter().find(|(k, _)| k == "cluster") {
        Some((_, v)) => parse_cluster_spec(v).map_err(|e| CliError::Usage(format!("-Dcluster: {e}")))?,
        None => ClusterSpec::single(),
    };
    Ok(Command::Run(CommandInvocation {
        component,
        flags,
        cluster,
    }))
}

/// Splits a whole command line with shell quoting rules, then parses it.
/// A leading `PAI` or `easyasr` word is dropped.
pub fn parse_command_line(line: &str) -> Result<Command, CliError> {
    let words = shell_words::split(line).map_err(|e| CliError::Usage(format!("cannot split command line: {e}")))?;
    let skip = usize::from(matches!(words.first().map(String::as_str), Some("PAI" | "easyasr")));
    parse_args(&words[skip..])
}

pub fn usage() -> String {
    let mut s = String::from("usage: easyasr <component> -Dkey=value ...\n       easyasr -name ASR_<Component> -Dkey=value ...\n\ncomponents:\n");
    for c in Component::ALL {
        s.push_str(&format!("  {:<15} -D{}\n", c.name(), c.flags().join(" -D")));
    }
    s
}
