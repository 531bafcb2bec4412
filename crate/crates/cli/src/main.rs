fn main() {
    std::process::exit(ann_calc::run(std::env::args_os()));
}
