fn main() {
    let env = |name: &str| std::env::var(name).ok();
    let code = pronoun_agents::cli::dispatch(
        std::env::args_os(),
        &env,
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    );
    std::process::exit(code);
}
