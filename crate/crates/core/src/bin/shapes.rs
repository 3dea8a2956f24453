fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("SHAPES_LOG")).init();
    std::process::exit(shapes_core::cli::run(std::env::args_os()));
}
