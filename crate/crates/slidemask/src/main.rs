fn main() {
    std::process::exit(slidemask::cli::main_entry());
}
