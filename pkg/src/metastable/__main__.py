from metastable.cli import main

raise SystemExit(main())
