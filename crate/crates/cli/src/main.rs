use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use roiskip_cli::{run, Cli, RunConfig};
use serde_json::{json, Value};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let started = Instant::now();
    let result = RunConfig::resolve(cli.config.as_deref())
        .and_then(|c| c.with_overrides(&cli.sets))
        .and_then(|c| run(cli.command, &c));
    let elapsed_ms = started.elapsed().as_millis() as u64;
    match result {
        Ok(fields) => {
            let mut line = json!({ "command": cli.command.name(), "ok": true });
            if let (Value::Object(out), Value::Object(extra)) = (&mut line, fields) {
                out.extend(extra);
                out.insert("elapsed_ms".into(), elapsed_ms.into());
            }
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = e.exit_code();
            let line = json!({ "command": cli.command.name(), "ok": false, "error": e.to_string(), "exit_code": code });
            println!("{line}");
            eprintln!("roiskip {}: {e}", cli.command.name());
            ExitCode::from(u8::try_from(code).unwrap_or(1))
        }
    }
}
