//! Local promotion: variables whose address is never taken move out of
//! memory into temporaries. Statement structure is untouched; only the
//! classification of names changes, so the target allocates fewer blocks.

use crate::lang::minic::MiniCModule;

pub fn local_promotion(m: &MiniCModule) -> MiniCModule {
    let mut out = m.clone();
    for f in &mut out.funcs {
        let addressed = f.addressed_names();
        let (keep, promote): (Vec<String>, Vec<String>) =
            f.locals.iter().cloned().partition(|x| addressed.contains(x));
        f.locals = keep;
        f.temps.extend(promote);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::minic::parse_module;

    #[test]
    fn unaddressed_locals_become_temps() {
        let src = r#"
extern g(ptr) -> void

func f() -> void {
  var x, y
  x = 1
  call g(&y)
  return
}
"#;
        let m = parse_module(src).unwrap();
        let p = local_promotion(&m);
        let f = p.func("f").unwrap();
        assert_eq!(f.locals, vec!["y".to_string()]);
        assert_eq!(f.temps, vec!["x".to_string()]);
        assert_eq!(f.body, m.func("f").unwrap().body);
    }

    #[test]
    fn fully_addressed_module_is_unchanged() {
        let src = r#"
extern g(ptr, ptr) -> void

func f() -> void {
  var x, y
  call g(&x, &y)
  return
}
"#;
        let m = parse_module(src).unwrap();
        let p = local_promotion(&m);
        assert_eq!(p.func("f").unwrap().locals, m.func("f").unwrap().locals);
        assert!(p.func("f").unwrap().temps.is_empty());
    }
}
