import os
import sys

# Add the marblr module directory to the Python path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))


def main():
    from marblr.cli import main as cli_main
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
