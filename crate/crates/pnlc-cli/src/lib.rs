//! CLI entry point; subcommands land here once the pipeline modules exist.

/// Run the CLI; returns the process exit code.
pub fn run<I: IntoIterator<Item = String>>(_argv: I) -> i32 {
    eprintln!("not yet wired");
    2
}
