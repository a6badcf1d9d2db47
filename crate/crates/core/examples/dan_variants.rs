//! Domain probability maps and branch layouts of the four DAN variants at the
//! default detector width.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use msda::adaptation::{dan_forward, DanArchitecture, DanKind, DanVariant, GrlConfig};
use msda::detector::{Detector, DetectorConfig, Scale};
use msda::fixtures::{default_anchors, random_images};
use msda::params::ParamStore;

fn main() -> msda::Result<()> {
    let cfg = DetectorConfig {
        anchors: Some(default_anchors()),
        ..DetectorConfig::default()
    };
    let detector = Detector::new(cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = detector.init_params(&mut rng);
    let pyr = detector.extract_features(&random_images(&mut rng, 2, cfg.image_size), &params)?;
    let c = cfg.base_channels();
    for kind in DanKind::ALL {
        let arch = DanArchitecture::new(kind, c)?;
        let mut dan_params = ParamStore::new();
        for l in arch.layers() {
            l.init(&mut dan_params, &mut rng);
        }
        println!("{kind}  ({} parameters)", dan_params.num_scalars());
        for s in Scale::ALL {
            println!("  {s} channels {:?}", arch.branch(s).channel_schedule());
        }
        let maps = dan_forward(&pyr, &DanVariant::all_scales(kind), &dan_params, &GrlConfig::default(), 0.1)?;
        for m in &maps {
            println!("  map {} shape {:?}", m.scale, m.probs.shape());
        }
    }
    Ok(())
}
