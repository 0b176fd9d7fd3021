fn main() {
    std::process::exit(fdmnet::cli::run());
}
