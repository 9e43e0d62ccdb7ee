fn main() {
    std::process::exit(sempath_cli::run());
}
