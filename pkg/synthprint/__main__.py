"""Allow running synthprint as a module: python -m synthprint"""

from synthprint.cli import main

if __name__ == "__main__":
    main()
