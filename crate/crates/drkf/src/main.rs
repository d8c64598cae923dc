fn main() { println!("drkf"); }
