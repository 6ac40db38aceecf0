fn main() { std::process::exit(idcnn::cli::run()); }
