use std::io::Write;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mut out = Vec::new();
    let code = muslh::cli::run_cli(&args, &mut out);
    let text = String::from_utf8_lossy(&out);
    if code == muslh::cli::EXIT_USAGE {
        eprint!("{}", text);
    } else {
        print!("{}", text);
    }
    let _ = std::io::stdout().flush();
    std::process::exit(code);
}
