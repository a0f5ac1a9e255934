fn main() {
    let code = xcan::cli::run(std::env::args_os().skip(1), &mut std::io::stdout().lock());
    std::process::exit(code);
}
