use kindling::remote::ApiKey;

fn main() {
    let stdin = std::io::stdin();
    let code = kindling_cli::run(
        std::env::args_os(),
        ApiKey::from_env(),
        &mut stdin.lock(),
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    );
    std::process::exit(code);
}
