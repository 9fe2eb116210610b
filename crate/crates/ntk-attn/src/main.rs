fn main() {
    std::process::exit(ntk_attn::cli::run(std::env::args_os()));
}
