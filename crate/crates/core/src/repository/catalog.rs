//! Printers and materials the repository keeps documents for.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Printer {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub id: String,
    pub name: String,
    pub density_g_cm3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub printers: Vec<Printer>,
    pub materials: Vec<Material>,
}

impl Catalog {
    pub fn has_printer(&self, id: &str) -> bool {
        self.printers.iter().any(|p| p.id == id)
    }

    pub fn has_material(&self, id: &str) -> bool {
        self.materials.iter().any(|m| m.id == id)
    }

    pub fn default_printer(&self) -> &str {
        &self.printers[0].id
    }

    pub fn default_material(&self) -> &str {
        &self.materials[0].id
    }
}

impl Default for Catalog {
    /// Ten common FDM printers and seven filament types.
    fn default() -> Self {
        let printers = [
            ("ultimaker-3", "Ultimaker 3"),
            ("ultimaker-s5", "Ultimaker S5"),
            ("prusa-mk3s", "Original Prusa i3 MK3S"),
            ("creality-ender-3", "Creality Ender-3"),
            ("creality-cr-10", "Creality CR-10"),
            ("makerbot-replicator", "MakerBot Replicator+"),
            ("lulzbot-mini-2", "LulzBot Mini 2"),
            ("anycubic-i3-mega", "Anycubic i3 Mega"),
            ("flashforge-creator-pro", "FlashForge Creator Pro"),
            ("raise3d-pro2", "Raise3D Pro2"),
        ];
        let materials = [
            ("pla", "PLA", 1.24),
            ("abs", "ABS", 1.04),
            ("petg", "PETG", 1.27),
            ("tpu", "TPU", 1.21),
            ("nylon", "Nylon", 1.14),
            ("asa", "ASA", 1.07),
            ("pc", "Polycarbonate", 1.20),
        ];
        Self {
            printers: printers.iter().map(|(id, name)| Printer { id: (*id).into(), name: (*name).into() }).collect(),
            materials: materials
                .iter()
                .map(|(id, name, density)| Material { id: (*id).into(), name: (*name).into(), density_g_cm3: *density })
                .collect(),
        }
    }
}
