"""
Console summaries for command line runs.
"""


def print_section(title):
    """Print a formatted section header"""
    print(f"\n{'=' * 60}")
    print(f" {title}")
    print(f"{'=' * 60}")


def print_result(name, result):
    """Print a result dict: status line, then one line per entry."""
    print(f"\n{name}:")
    print("-" * (len(name) + 1))

    if not isinstance(result, dict):
        print(f"Result: {result}")
        return

    if not result.get('success'):
        print("❌ FAILED")
        print(f"  Error: {result.get('error', 'Unknown error')}")
        return

    print("✅ SUCCESS")
    for key, value in result.items():
        if key == 'success':
            continue
        if isinstance(value, list) and len(value) > 3:
            print(f"  {key}: {len(value)} items (showing first 3)")
            for item in value[:3]:
                print(f"    - {item}")
        elif isinstance(value, float):
            print(f"  {key}: {value:.6g}")
        else:
            print(f"  {key}: {value}")
