use facebench_core::pipeline::SystemLauncher;

fn main() {
    let code = facebench_cli::run(std::env::args_os(), &SystemLauncher, &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
