//! `asr` — operator surface for the speech recognition toolkit.
//!
//! Commands: synth, featurize, train, decode, score, verify. Every command
//! takes `--config PATH` plus documented override flags. Exit codes: 0
//! success, 1 usage, 2 data, 3 verification failure.

mod args;
mod commands;
mod config;

use std::fmt;

pub enum CliError {
    Usage(String),
    Data(String),
    Verification(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Data(m) => write!(f, "{m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl From<String> for CliError {
    fn from(m: String) -> Self {
        CliError::Usage(m)
    }
}

fn usage() -> String {
    "asr <command> [--config PATH] [flags]\n\
     commands:\n\
       synth      --out-dir DIR [--n-utts N] [--alphabet-size K] [--seed S]\n\
       featurize  --manifest PATH --out-dir DIR [--kind both|fbank|spectrogram]\n\
       train      --manifest PATH --out-dir DIR [--max-steps N] [--seed S] [--lm-out PATH]\n\
       decode     --checkpoint PATH --manifest PATH [--beam-width W] [--ctc-weight L]\n\
                  [--lm PATH] [--lm-weight G] [--out PATH] [--vocab PATH] [--force]\n\
       score      (--refs PATH --hyps PATH | --refs-manifest PATH --hyps-jsonl PATH) [--json PATH]\n\
       verify     [--cases N] [--json PATH]\n\
     environment: ASR_NUM_WORKERS caps worker threads"
        .to_string()
}

fn main() {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let code = match run(&argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("asr: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("{}", usage());
            }
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn run(argv: &[String]) -> Result<(), CliError> {
    let Some(command) = argv.first() else {
        return Err(CliError::Usage("no command given".into()));
    };
    let rest = &argv[1..];
    match command.as_str() {
        "synth" => commands::synth::run(rest),
        "featurize" => commands::featurize::run(rest),
        "train" => commands::train::run(rest),
        "decode" => commands::decode::run(rest),
        "score" => commands::score::run(rest),
        "verify" => commands::verify::run(rest),
        other => Err(CliError::Usage(format!("unknown command {other:?}"))),
    }
}
