use clap::Parser;
use ctcst_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(report) => {
            println!(
                "{} finished in {:.0} ms",
                report.meta.command, report.meta.wall_clock_ms
            );
            for (name, value) in &report.metrics {
                println!("  {name}: {value}");
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}
