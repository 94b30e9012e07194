"""Print parameter counts and protocol verdicts for every architecture preset."""

from predcode import archproto as ap


def main():
    print(f"{'preset':<10} {'params':>10}  protocol")
    for name in ap.PRESETS:
        a = ap.build_preset(name)
        ap.link_table(a)
        rep = ap.validate_rb_protocol(a)
        verdict = "PASS" if rep.passed else "FAIL: " + "; ".join(sorted(rep.rules))
        print(f"{name:<10} {ap.total_params(a):>10,}  {verdict}")
    print()
    print(ap.param_report(ap.build_preset("rbp3")))


if __name__ == "__main__":
    main()
