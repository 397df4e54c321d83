use qsentry_core::data::synthetic::generate;
use qsentry_core::data::{CROP_SIDE, CROP_START, IMAGE_SIDE};

fn main() {
    let (set, labels) = generate(40, 4);
    let mut worst = (1.0f64, 0usize);
    for (idx, pixels) in set.images.iter().enumerate() {
        let total: u32 = pixels.iter().map(|&p| p as u32).sum();
        let mut inside = 0u32;
        for r in CROP_START..CROP_START + CROP_SIDE {
            for c in CROP_START..CROP_START + CROP_SIDE {
                inside += pixels[r * IMAGE_SIDE + c] as u32;
            }
        }
        let frac = inside as f64 / total as f64;
        if frac < worst.0 { worst = (frac, idx); }
    }
    println!("worst inside fraction: {:.3} at idx {} (digit {})", worst.0, worst.1, labels[worst.1]);
    let px = &set.images[worst.1];
    for r in 0..IMAGE_SIDE {
        let row: String = (0..IMAGE_SIDE).map(|c| {
            let v = px[r * IMAGE_SIDE + c];
            if v > 180 {'#'} else if v > 90 {'+'} else if v > 20 {'.'} else {' '}
        }).collect();
        println!("{:2} |{}|", r, row);
    }
}
