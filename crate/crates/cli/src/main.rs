use std::process::ExitCode;

use clap::Parser;

mod args;
mod commands;
mod config;
mod failure;
mod output;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Infer(a) => commands::infer(a),
        Command::Pseudo(a) => commands::pseudo(a),
        Command::LearnProxy(a) => commands::learn_proxy(a),
        Command::Eval(a) => commands::eval(a),
        Command::Synth(a) => commands::synth(a),
        Command::VerifyTheory(a) => commands::verify_theory(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("inmap: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
