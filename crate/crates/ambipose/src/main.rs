use std::process::ExitCode;

use ambipose::cli::{Cli, Command};
use ambipose::commands::{self, Context};
use ambipose::run::thread_count;
use ambipose::Result;
use clap::Parser;

fn run(cli: Cli) -> Result<()> {
    let ctx = Context {
        out_dir: cli.out_dir,
        threads: thread_count(Some(cli.threads)),
    };
    match cli.command {
        Command::Gen(args) => {
            let (dir, manifest) = commands::gen(&ctx, &args)?;
            println!("wrote {}: {}", dir.display(), manifest.summary());
        }
        Command::Train(args) => {
            let report = commands::train(&ctx, &args, |line| eprintln!("{line}"))?;
            if let Some(last) = report.epochs.last() {
                println!(
                    "trained {} epochs, final loss {:.5} (error {:.5}, kl {:.3}); checkpoint {}",
                    report.epochs.len(),
                    last.stats.loss,
                    last.stats.selected_error,
                    last.stats.kl,
                    report.checkpoint.display()
                );
            } else {
                println!("nothing to train; checkpoint {}", report.checkpoint.display());
            }
        }
        Command::Eval(args) => {
            let report = commands::eval(&ctx, &args)?;
            print!("{}", report.to_table());
        }
        Command::Viz(args) => {
            for path in commands::viz(&ctx, &args)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Bench(args) => {
            let t = commands::bench(&args)?;
            println!("{:.4} ± {:.4} ms", t.mean_ms, t.std_ms);
        }
        Command::SweepAlpha(args) => {
            let (path, runs) = commands::sweep_alpha(&ctx, &args)?;
            println!("wrote {} ({} runs)", path.display(), runs.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
