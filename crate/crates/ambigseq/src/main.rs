use std::process::ExitCode;

fn main() -> ExitCode {
    ambigseq::cli::main()
}
