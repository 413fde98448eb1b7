use clap::Parser;
use std::io::Write;

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::panic::set_hook(Box::new(move |info| {
        let path = std::env::temp_dir().join(format!("edgeseg-crash-{}.txt", std::process::id()));
        let dump = format!(
            "{info}\nargs: {argv:?}\nbacktrace:\n{}\n",
            std::backtrace::Backtrace::force_capture()
        );
        let written = std::fs::File::create(&path).and_then(|mut f| f.write_all(dump.as_bytes()));
        match written {
            Ok(()) => eprintln!("internal error: {info}\ndiagnostics written to {}", path.display()),
            Err(_) => eprintln!("internal error: {info}"),
        }
    }));
    let cli = edgeseg::cli::Cli::parse();
    match edgeseg::cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {}", e.to_string().lines().next().unwrap_or_default());
            std::process::exit(1);
        }
    }
}
