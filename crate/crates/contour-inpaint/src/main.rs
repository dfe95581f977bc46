fn main() {
    std::process::exit(contour_inpaint::cli::run(std::env::args_os()));
}
