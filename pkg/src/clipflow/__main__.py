from clipflow.cli import main

raise SystemExit(main())
