fn main() {
    // Subcommands land once the core pipeline is in place.
}
