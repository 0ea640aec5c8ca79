//! `tautree` command-line tool; see [`tautree::cli`].

fn main() {
    let code = tautree::cli::run(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
