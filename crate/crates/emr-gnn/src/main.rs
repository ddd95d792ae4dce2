fn main() {
    std::process::exit(emr_gnn::cli::run());
}
