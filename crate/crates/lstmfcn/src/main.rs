fn main() {
    std::process::exit(lstmfcn::cli::main());
}
