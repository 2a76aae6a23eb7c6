fn main() {
    let code = cascade_trace_cli::main_with(std::env::args_os(), &mut std::io::stdout());
    std::process::exit(code);
}
