pub fn dispatch(_args: &[String]) -> u8 { 2 }
