use std::process::ExitCode;

fn main() -> ExitCode {
    fedveca::cli::init_logging();
    let stdout = std::io::stdout();
    match fedveca::cli::main_with(std::env::args_os(), &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
