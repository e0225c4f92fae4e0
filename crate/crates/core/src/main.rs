use std::process::ExitCode;

fn main() -> ExitCode {
    let code = meshseq_core::apps::cli::cli_main(
        std::env::args_os(),
        &mut std::io::stdout(),
        &mut std::io::stderr(),
    );
    ExitCode::from(code as u8)
}
